"""
Test suite for the CCN CTR model
"""
