"""Bayesian multinomial probit and robit choice models estimated by Gibbs sampling."""

__version__ = "0.1.0"
