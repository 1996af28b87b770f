"""Configuration, persistence and the command-line pipeline."""
