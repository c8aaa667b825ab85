"""SpinLab test suite."""
