"""snarecast: grid-cell poaching threat prediction from sparse patrol data
combined with expert knowledge elicited through cluster questionnaires."""

__version__ = "0.1.0"
