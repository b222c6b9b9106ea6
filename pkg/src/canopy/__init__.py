"""canopy: out-of-core random forests built from top trees and leaf buckets."""
