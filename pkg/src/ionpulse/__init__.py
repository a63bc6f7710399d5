"""Pulsed-laser excitation of a three-level trapped ion."""
