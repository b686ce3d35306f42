"""
One module per command line stage, each providing a ``StageRunner``.
"""
