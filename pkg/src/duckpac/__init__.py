"""Relaxed current-injection OPF and NST-PAC coordination for feeder ramping studies."""
