"""Configuration package for email ingestion system"""
