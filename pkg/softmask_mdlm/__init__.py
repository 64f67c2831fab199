"""
SoftMask MDLM - Modelo de linguagem por difusão mascarada com realimentação soft-masking
"""

__version__ = '0.2.0'
