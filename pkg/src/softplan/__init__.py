"""Planning deformable-object manipulation with learned implicit dynamics."""

__version__ = "0.1.0"
