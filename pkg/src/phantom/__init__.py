"""
Synthetic thorax phantoms: rendering, ground truth, DICOM emission and
labelled cohorts that stand in for screening archives.
"""
