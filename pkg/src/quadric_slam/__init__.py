# -*- coding: utf-8 -*-
"""quadric-slam"""

__version__ = "0.1.0"
