"""Serverless collaborative workspaces over named, signed data.

Subpackages: ``security`` (keys, certificates, trust rules), ``crdt``
(document model) and ``sim`` (discrete-event network, stores, repo).
"""

__version__ = "0.1.0"
