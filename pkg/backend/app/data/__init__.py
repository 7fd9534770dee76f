"""Dataset loading, standardization and splitting"""
