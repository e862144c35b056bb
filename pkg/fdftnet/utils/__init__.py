"""Utils Package.

This package contains utility modules for:
- Structured audit logging and run logs
- The binary checkpoint format
- Image decoding, encoding and resizing
- Dataset loading and the synthetic fixture
"""
