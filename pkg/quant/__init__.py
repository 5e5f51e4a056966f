"""
Wavelet, quantizadores straight-through e kernels empacotados
"""
