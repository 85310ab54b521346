"""Mask-guided control and dual-branch inpainting on a toy latent-diffusion stack."""

__version__ = "0.1.0"
