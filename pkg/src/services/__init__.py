"""
CTI records, ledger, privacy, aggregation, learning, proofs and simulation
"""
