"""
lungrisk source package

Root package for the imaging, modeling, analysis, phantom and processing layers.
"""
