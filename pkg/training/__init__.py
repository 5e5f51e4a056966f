"""
Treinamento em dois estágios (warmup + bit-width dinâmico) e ablações
"""
