"""fairaug: subgroup auditing, synthetic-augmentation planning and fairness
evaluation for cardiac MRI datasets."""

__version__ = "0.1.0"
