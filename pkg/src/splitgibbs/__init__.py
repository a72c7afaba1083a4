"""Solvers and samplers for Gaussian Markov random fields built on matrix splittings."""
