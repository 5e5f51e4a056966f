"""
Relatórios do Multiscale Quantizer
"""
