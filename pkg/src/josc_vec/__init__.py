"""Joint offloading and resource allocation for vehicular edge computing."""
