"""Expert-aware uncertainty estimation for binary classifiers.

Combines ensemble disagreement (epistemic) with the complexity of expert
votes, or of networks fine-tuned to imitate them (aleatoric), and evaluates
estimators with accuracy-rejection curves.
"""

__version__ = "0.1.0"
