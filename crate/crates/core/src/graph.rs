// SPDX-License-Identifier: Apache-2.0

//! Positive-interaction bipartite graph.

use serde::Serialize;

use crate::dataset::{Dataset, InteractionRecord};

/// Neighbor sets built from label-1 records. Duplicate positive records
/// collapse to one edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeighborIndex {
    pub items_of_user: Vec<Vec<u32>>,
    pub users_of_item: Vec<Vec<u32>>,
}

impl NeighborIndex {
    pub fn build(dataset: &Dataset) -> Self {
        Self::from_records(dataset.num_users, dataset.num_items, &dataset.records)
    }

    pub fn from_records(num_users: usize, num_items: usize, records: &[InteractionRecord]) -> Self {
        let mut items_of_user = vec![Vec::new(); num_users];
        let mut users_of_item = vec![Vec::new(); num_items];
        for r in records.iter().filter(|r| r.label == Some(true)) {
            items_of_user[r.user as usize].push(r.item);
            users_of_item[r.item as usize].push(r.user);
        }
        for set in items_of_user.iter_mut().chain(users_of_item.iter_mut()) {
            set.sort_unstable();
            set.dedup();
        }
        NeighborIndex {
            items_of_user,
            users_of_item,
        }
    }

    pub fn num_users(&self) -> usize {
        self.items_of_user.len()
    }

    pub fn num_items(&self) -> usize {
        self.users_of_item.len()
    }

    pub fn num_edges(&self) -> usize {
        self.items_of_user.iter().map(Vec::len).sum()
    }

    pub fn user_degree(&self, u: u32) -> usize {
        self.items_of_user[u as usize].len()
    }

    pub fn item_degree(&self, i: u32) -> usize {
        self.users_of_item[i as usize].len()
    }

    pub fn has_edge(&self, u: u32, i: u32) -> bool {
        self.items_of_user[u as usize].binary_search(&i).is_ok()
    }

    /// Neighbors of a global entity id (users first, then items), returned as
    /// global entity ids.
    pub fn entity_neighbors(&self, entity: usize) -> impl Iterator<Item = usize> + '_ {
        let nu = self.num_users();
        let (set, offset) = if entity < nu {
            (&self.items_of_user[entity], nu)
        } else {
            (&self.users_of_item[entity - nu], 0)
        };
        set.iter().map(move |&x| x as usize + offset)
    }

    pub fn entity_degree(&self, entity: usize) -> usize {
        let nu = self.num_users();
        if entity < nu {
            self.items_of_user[entity].len()
        } else {
            self.users_of_item[entity - nu].len()
        }
    }

    /// Global entity ids whose neighbor set differs between the two indices.
    pub fn changed_entities(&self, other: &NeighborIndex) -> Vec<usize> {
        let nu = self.num_users();
        let users = (0..nu).filter(|&u| self.items_of_user[u] != other.items_of_user[u]);
        let items = (0..self.num_items())
            .filter(|&i| self.users_of_item[i] != other.users_of_item[i])
            .map(|i| i + nu);
        users.chain(items).collect()
    }
}
