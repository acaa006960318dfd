"""File-format integrations: VTK export, N-D CSV and run artifacts."""
