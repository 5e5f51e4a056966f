"""
Núcleo tensorial e otimizador do Multiscale Quantizer
"""
