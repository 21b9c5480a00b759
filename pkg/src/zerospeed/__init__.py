"""Motion-state detection from blind-spot camera frames."""
