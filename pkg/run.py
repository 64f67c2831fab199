#!/usr/bin/env python3
"""
Script de inicialização do sistema de difusão mascarada com soft-masking.
"""
import sys
from softmask_mdlm.main import main

if __name__ == "__main__":
    sys.exit(main())
