#!/usr/bin/env python3
"""
Configuration Test Script
Verifies that the lab settings and numerical dependencies are usable.
"""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

print("\n" + "="*70)
print("🔍 Harmonic Map Flow Lab - Configuration Test")
print("="*70 + "\n")

try:
    from config import settings

    print("✅ Configuration loaded successfully!\n")

    print("Grid:")
    print(f"   Half width L: {settings.DEFAULT_HALF_WIDTH}")
    print(f"   Nodes N: {settings.DEFAULT_NODES}")
    print(f"   Spacing h: {2 * settings.DEFAULT_HALF_WIDTH / (settings.DEFAULT_NODES - 1):.5f}\n")

    print("Flow:")
    print(f"   dt safety: {settings.DT_SAFETY}")
    print(f"   Numba requested: {settings.USE_NUMBA}\n")

    print("Analysis:")
    print(f"   eps0: {settings.EPS0}")
    print(f"   beta: {settings.LOJ_BETA}")
    print(f"   Poincare tolerance: {settings.POINCARE_TOLERANCE}\n")

    print("Execution:")
    print(f"   Jobs: {settings.JOBS}")
    print(f"   Corpus seed: {settings.CORPUS_SEED}")
    print(f"   Output directory: {settings.OUTPUT_DIR}\n")

    print("Dependencies:")
    from src.fields.kernels import HAS_NUMBA
    import numpy
    import scipy
    import yaml
    print(f"   numpy {numpy.__version__}, scipy {scipy.__version__}, PyYAML {yaml.__version__}")
    if HAS_NUMBA:
        print("   ✅ numba available (JIT radial kernel)")
    else:
        print("   ⚠️  numba not importable: equivariant runs use the numpy kernel (much slower)")

    print("\n" + "="*70)
    print("✅ Configuration test complete!")
    print("="*70 + "\n")

    print("Next steps:")
    print("   1. Run: python main.py preset quantization")
    print("   2. Run: python main.py corpus --seed 7 --out runs/corpus")
    print("   3. Run: python main.py verify poincare runs/corpus\n")

except ValueError as e:
    print(f"❌ Configuration Error:\n   {e}\n")
    print("Please check your .env file (HMF_* variables).\n")
    sys.exit(1)
except Exception as e:
    print(f"❌ Unexpected Error:\n   {e}\n")
    import traceback
    traceback.print_exc()
    sys.exit(1)
