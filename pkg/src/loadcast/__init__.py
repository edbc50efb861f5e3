"""Learned tactical load planning for double-stack intermodal trains."""
