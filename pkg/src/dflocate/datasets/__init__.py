"""Bundled MNIST digits 7 and 9 (IDX, gzip)."""
