"""PAC-Bayes certificates for Gibbs classifiers with differentially private data-dependent priors."""

__version__ = "0.1.0"
