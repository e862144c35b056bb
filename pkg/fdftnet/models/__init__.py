"""Models Package.

This package contains the Pydantic records that validate run configuration,
checkpoint metadata, evaluation results and run manifests.
"""
