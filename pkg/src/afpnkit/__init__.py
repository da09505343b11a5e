"""AF-FPN neck, CIoU loss, learned augmentation search and detection metrics
in plain numpy."""

__version__ = "0.1.0"
