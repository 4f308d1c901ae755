"""
Imaging layer: DICOM ingestion, volume types and formats, resampling,
lung segmentation, windowing and cropping.
"""
