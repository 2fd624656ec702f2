"""Shared plumbing: errors, logging, hashing, containers, seeding and output directories."""
