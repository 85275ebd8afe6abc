"""
Settings, logging setup and the shared exception hierarchy
"""
