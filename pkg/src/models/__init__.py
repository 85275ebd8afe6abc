"""
Pydantic models for scenario configuration and reports
"""
