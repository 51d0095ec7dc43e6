""" Top-view visual prompting for zero-shot object navigation in a deterministic 2-D world. """
