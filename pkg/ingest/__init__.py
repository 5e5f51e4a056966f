"""
Ingestão de datasets desk-scale: MNIST (IDX), CIFAR-10 (binário) e tarefa sintética
"""
