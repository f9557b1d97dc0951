"""RGB-D salient object detection with a two-stream network whose streams
exchange attention, contrast and a learned fusion weight.
"""

__version__ = "0.1.0"
