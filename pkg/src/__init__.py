"""
legion-cti-lab: federated CTI sharing lab
"""
