"""Height-based 2D-to-3D lifting, voxel pooling and BEV fusion geometry."""
