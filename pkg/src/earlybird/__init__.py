"""Loop closure from opposing viewpoints on aliased floors.

Floor views are warped to a top-down patch by a fixed homography, the reverse
pass is pi-rotated, and matched places become SE(2) loop constraints for a
robust pose-graph optimizer. A seeded corridor simulator supplies data.
"""
__version__ = "0.1.0"
