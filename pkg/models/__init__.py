"""
Camadas multiscale e rede desk-scale
"""
