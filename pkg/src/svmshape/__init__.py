"""Shapes represented as generated training sets for a differentiable kernel SVM."""
