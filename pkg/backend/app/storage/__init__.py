"""Report and checkpoint persistence"""
