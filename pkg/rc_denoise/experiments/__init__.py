"""
Experiment orchestration: configuration, datasets, pipeline stages and studies
"""
