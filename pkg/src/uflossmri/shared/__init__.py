"""Run layout, logging, manifests, and array containers."""
