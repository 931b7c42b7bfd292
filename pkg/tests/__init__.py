"""
Test suite for Selfie Synergy
"""
