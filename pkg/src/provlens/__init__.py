"""provlens: identity-behavior anomaly detection over provenance graphs.

Pipeline: parse audit events into aggregated provenance graphs, learn node
embeddings that bind fine-grained identities to behavior, profile benign
identities as hyperspheres, flag identity-consistency violations, and drive a
four-agent investigation loop that turns alerts into an incident report.
"""

__version__ = "0.1.0"
