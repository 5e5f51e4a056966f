"""
Configuração centralizada
"""
