"""Losses, schedules, training loops and inference for the segmentation and enhancement networks."""
