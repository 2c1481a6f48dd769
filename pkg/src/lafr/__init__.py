"""Local-adaptive face recognition on synthetic embedding domains.

Meta-trained GCN clustering yields pseudo identities for an unlabeled domain,
regularized center transfer adapts a pre-trained backbone to it, and a
federated dual loop averages adapted backbones across clients.
"""

__version__ = "0.1.0"
