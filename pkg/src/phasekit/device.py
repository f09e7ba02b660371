"""Compute-device selection via the PHASEKIT_DEVICE environment variable."""

import os

import torch


def current_device():
    """torch.device from $PHASEKIT_DEVICE (default cpu)."""
    return torch.device(os.environ.get("PHASEKIT_DEVICE", "cpu"))
