# Operator Calculus Lab Utilities
