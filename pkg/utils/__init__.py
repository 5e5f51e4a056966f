"""
Utilitários e taxonomia de erros
"""
