"""
Persistência de ModelBundle e materialização hot-swap
"""
